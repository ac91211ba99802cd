"""
URL configuration for fecapsim project.

Only the admin is exposed; it lists recorded simulation runs, their output files and fits.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
