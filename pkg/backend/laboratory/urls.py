from django.urls import path
from . import views

urlpatterns = [
    path('ensembles/', views.list_ensembles, name='list_ensembles'),
    path('spectrum/', views.spectrum, name='spectrum'),
    path('experiments/', views.run_experiment, name='run_experiment'),
]
