"""Mobile-malware incidence measurement and bag-of-applications risk indicators."""

__version__ = "0.1.0"
