from django.apps import AppConfig


class FecapConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'fecap'
    verbose_name = 'Ferroelectric capacitor simulator'
