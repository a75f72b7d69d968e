from django.urls import path
from . import views

"""
URL Configuration for the experiment results API (read-only)
"""

urlpatterns = [
    # GET /api/runs/?dataset=satellite&kind=k_sweep -> List with pagination
    path(
        'runs/',
        views.run_list,
        name='run-list'
    ),

    # GET /api/runs/1/ -> Run #1 with its per-seed results
    path(
        'runs/<int:pk>/',
        views.run_detail,
        name='run-detail'
    ),
]
