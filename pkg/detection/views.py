import django_filters
from rest_framework import status
from rest_framework.decorators import api_view
from rest_framework.response import Response
from rest_framework.pagination import PageNumberPagination
from django.db.models import Count
from django.shortcuts import get_object_or_404
from drf_spectacular.utils import extend_schema, OpenApiParameter, OpenApiResponse
from .models import ExperimentRun
from .serializers import ExperimentRunSerializer, ExperimentRunListSerializer


class RunPagination(PageNumberPagination):
    """
    Custom pagination for ExperimentRun views
    """
    page_size = 20
    page_size_query_param = 'page_size'
    max_page_size = 100


class RunFilter(django_filters.FilterSet):
    dataset = django_filters.CharFilter(field_name='dataset', lookup_expr='iexact')

    class Meta:
        model = ExperimentRun
        fields = ['dataset', 'kind', 'status']


@extend_schema(
    parameters=[
        OpenApiParameter('dataset', str, description='Dataset name, case-insensitive'),
        OpenApiParameter('kind', str, enum=[k for k, _ in ExperimentRun.KIND_CHOICES]),
        OpenApiParameter('status', str, enum=[s for s, _ in ExperimentRun.STATUS_CHOICES]),
    ],
    responses={200: OpenApiResponse(response=ExperimentRunListSerializer(many=True))}
)
@api_view(['GET'])
def run_list(request):
    """
    List recorded experiment runs ordered by dataset, kind and setting
    """
    queryset = ExperimentRun.objects.annotate(n_results=Count('seed_results'))
    filterset = RunFilter(request.query_params, queryset=queryset)
    if not filterset.is_valid():
        return Response(filterset.errors, status=status.HTTP_400_BAD_REQUEST)
    queryset = filterset.qs.order_by('dataset', 'kind', 'setting')
    paginator = RunPagination()
    paginated_queryset = paginator.paginate_queryset(queryset, request)
    serializer = ExperimentRunListSerializer(paginated_queryset, many=True)
    return paginator.get_paginated_response(serializer.data)


@extend_schema(responses={200: ExperimentRunSerializer})
@api_view(['GET'])
def run_detail(request, pk):
    """
    Retrieve one run with its per-seed results
    """
    run = get_object_or_404(ExperimentRun.objects.prefetch_related('seed_results'), pk=pk)
    serializer = ExperimentRunSerializer(run)
    return Response(serializer.data)
