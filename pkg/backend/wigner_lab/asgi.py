"""
ASGI entry point of the wigner_lab project (``application``).
"""

import os

from django.core.asgi import get_asgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'wigner_lab.settings')

application = get_asgi_application()
