from django.apps import AppConfig


class AngularKdConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'angular_kd'
    verbose_name = 'Angular knowledge distillation'
