# Sphinx configuration for the priorview documentation.
#
# Build with `sphinx-build -b html docs docs/_build/html`.

project = "priorview"
version = "0.1"
release = "0.1"

extensions = []
source_suffix = ".rst"
master_doc = "index"
exclude_patterns = ["_build"]

pygments_style = "sphinx"
html_theme = "default"
