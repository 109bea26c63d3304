import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'stomo.settings')
django.setup()
