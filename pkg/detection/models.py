from django.db import models


class ExperimentRun(models.Model):
    """
    One evaluated setting: a single eval, a multi-seed experiment or one
    point of a K / contamination sweep. Re-recording the same
    (fingerprint, kind, setting) updates the row in place.
    """
    KIND_CHOICES = [
        ("eval", "Evaluation"),
        ("experiment", "Multi-seed experiment"),
        ("k_sweep", "K sweep point"),
        ("noise", "Contamination sweep point"),
    ]
    STATUS_CHOICES = [
        ("ok", "Completed"),
        ("partial", "Some seeds failed"),
        ("failed", "Failed"),
    ]

    dataset = models.CharField(max_length=50, db_index=True)
    kind = models.CharField(max_length=20, choices=KIND_CHOICES, db_index=True)
    setting = models.CharField(max_length=50, blank=True, default="")  # e.g. "k=7", "noise=0.03"
    config_fingerprint = models.CharField(max_length=64, db_index=True)
    effective_config = models.JSONField(default=dict)

    # Means over successful seeds; null when every seed failed
    precision = models.FloatField(null=True, blank=True)
    recall = models.FloatField(null=True, blank=True)
    f1 = models.FloatField(null=True, blank=True)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, db_index=True)

    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        unique_together = ("config_fingerprint", "kind", "setting")
        indexes = [
            models.Index(fields=['dataset', 'kind']),
        ]
        ordering = ['dataset', 'kind', 'setting']

    def __str__(self):
        label = f" {self.setting}" if self.setting else ""
        return f"{self.dataset} {self.kind}{label} ({self.status})"


class SeedResult(models.Model):
    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name="seed_results",
    )
    seed = models.PositiveIntegerField()
    status = models.CharField(max_length=10, choices=[("ok", "Completed"), ("failed", "Failed")])
    precision = models.FloatField(null=True, blank=True)
    recall = models.FloatField(null=True, blank=True)
    f1 = models.FloatField(null=True, blank=True)
    threshold = models.FloatField(null=True, blank=True)
    error = models.TextField(blank=True, default="")

    class Meta:
        unique_together = ("run", "seed")
        ordering = ['run', 'seed']

    def __str__(self):
        return f"{self.run_id} seed {self.seed}: {self.status}"
