"""
WSGI entry point of the wigner_lab project (``application``).
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'wigner_lab.settings')

application = get_wsgi_application()
