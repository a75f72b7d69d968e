from django.test import TestCase
from django.urls import reverse
from rest_framework.test import APIClient
from rest_framework import status
from detection.models import ExperimentRun, SeedResult
import time

"""
API Tests

Why test APIs?
- Results recorded by the sweep/eval commands must be browsable
- Validate pagination and filters
- Ensure read-only endpoints stay read-only
- Ensure <100ms response time
"""


class ExperimentRunAPITest(TestCase):
    """Test ExperimentRun API endpoints"""

    def setUp(self):
        """Create test data before each test"""
        self.client = APIClient()

        # 25 K-sweep points on satellite (to test pagination beyond 20)
        for k in range(25):
            run = ExperimentRun.objects.create(
                dataset="satellite",
                kind="k_sweep",
                setting=f"k={k + 5:02d}",
                config_fingerprint="a" * 64,
                precision=0.7,
                recall=0.7,
                f1=0.7,
                status="ok",
            )
            for seed in range(2):
                SeedResult.objects.create(run=run, seed=seed, status="ok", precision=0.7, recall=0.7, f1=0.7, threshold=3.5)

        self.eval_run = ExperimentRun.objects.create(
            dataset="kdd99",
            kind="eval",
            setting="seed=0",
            config_fingerprint="b" * 64,
            effective_config={"train": {"seed": 0}},
            precision=0.95,
            recall=0.94,
            f1=0.945,
            status="ok",
        )
        SeedResult.objects.create(run=self.eval_run, seed=0, status="ok", precision=0.95, recall=0.94, f1=0.945, threshold=7.25)

    # ==================== LIST ENDPOINT TESTS ====================

    def test_list_runs_pagination(self):
        """
        Test: List returns 20 runs per page
        """
        url = reverse('run-list')
        response = self.client.get(url)

        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(len(response.data['results']), 20)
        self.assertIsNotNone(response.data['next'])
        self.assertEqual(response.data['count'], 26)

    def test_list_runs_second_page(self):
        """Test pagination to second page"""
        url = reverse('run-list')
        response = self.client.get(url, {'page': 2})

        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(len(response.data['results']), 6)
        self.assertIsNone(response.data['next'])
        self.assertIsNotNone(response.data['previous'])

    def test_list_runs_empty_page(self):
        """Test requesting page that doesn't exist"""
        url = reverse('run-list')
        response = self.client.get(url, {'page': 999})

        self.assertEqual(response.status_code, status.HTTP_404_NOT_FOUND)

    def test_list_counts_seed_results(self):
        """List rows carry the number of seeds without the nested results"""
        url = reverse('run-list')
        response = self.client.get(url, {'kind': 'eval'})

        row = response.data['results'][0]
        self.assertEqual(row['n_seeds'], 1)
        self.assertNotIn('seed_results', row)

    # ==================== FILTERING TESTS ====================

    def test_filter_by_dataset_case_insensitive(self):
        """Test filtering runs by dataset name"""
        url = reverse('run-list')
        response = self.client.get(url, {'dataset': 'KDD99'})

        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['count'], 1)
        self.assertEqual(response.data['results'][0]['dataset'], 'kdd99')

    def test_filter_by_kind(self):
        """Test filtering runs by kind"""
        url = reverse('run-list')
        response = self.client.get(url, {'kind': 'k_sweep'})

        self.assertEqual(response.data['count'], 25)
        for run in response.data['results']:
            self.assertEqual(run['kind'], 'k_sweep')

    def test_filter_by_status(self):
        """Test filtering partial runs"""
        ExperimentRun.objects.create(
            dataset="arrhythmia", kind="experiment", config_fingerprint="c" * 64, f1=0.5, status="partial",
        )
        url = reverse('run-list')
        response = self.client.get(url, {'status': 'partial'})

        self.assertEqual(response.data['count'], 1)
        self.assertEqual(response.data['results'][0]['dataset'], 'arrhythmia')

    def test_invalid_filter_value(self):
        """Unknown kind is a 400, not an empty page"""
        url = reverse('run-list')
        response = self.client.get(url, {'kind': 'histogram'})

        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn('kind', response.data)

    # ==================== RETRIEVE ENDPOINT TESTS ====================

    def test_retrieve_run_by_id(self):
        """
        Test: Retrieve one run with its nested seed results
        """
        url = reverse('run-detail', kwargs={'pk': self.eval_run.id})
        response = self.client.get(url)

        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['setting'], 'seed=0')
        self.assertEqual(response.data['effective_config'], {"train": {"seed": 0}})
        self.assertEqual(len(response.data['seed_results']), 1)
        self.assertEqual(response.data['seed_results'][0]['threshold'], 7.25)

    def test_retrieve_nonexistent_run(self):
        """Test retrieving run that doesn't exist"""
        url = reverse('run-detail', kwargs={'pk': 99999})
        response = self.client.get(url)

        self.assertEqual(response.status_code, status.HTTP_404_NOT_FOUND)

    def test_endpoints_are_read_only(self):
        """
        Results are written by management commands only
        """
        response = self.client.post(reverse('run-list'), {'dataset': 'x'}, format='json')
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)

        response = self.client.delete(reverse('run-detail', kwargs={'pk': self.eval_run.id}))
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)
        self.assertTrue(ExperimentRun.objects.filter(id=self.eval_run.id).exists())

    # ==================== PERFORMANCE TEST ====================

    def test_response_time_under_100ms(self):
        """
        Test: API responds within 100ms
        """
        url = reverse('run-list')

        # Warm up query
        self.client.get(url)

        start_time = time.time()
        response = self.client.get(url)
        end_time = time.time()

        response_time_ms = (end_time - start_time) * 1000

        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertLess(
            response_time_ms, 100,
            f"Response time {response_time_ms:.2f}ms exceeds 100ms limit"
        )
