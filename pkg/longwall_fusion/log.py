from logging import getLogger

logger = getLogger(name="longwall_fusion")
