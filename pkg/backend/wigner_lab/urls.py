"""
URL configuration for wigner_lab project.
"""
from django.urls import path, include

urlpatterns = [
    path('api/lab/', include('laboratory.urls')),
]
