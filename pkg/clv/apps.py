from django.apps import AppConfig


class ClvConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'clv'
    verbose_name = 'Customer lifetime value'

    def ready(self):
        """Fail early on a broken CLV settings dict instead of mid-fit."""
        from clv import conf
        conf.snapshot()
