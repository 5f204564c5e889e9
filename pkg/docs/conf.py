# Sphinx-specific configuration for the robustprice docs.
# Project name and version come from pyproject.toml, passed to sphinx-build with -D.

# "_templates" is relative to docs/source/.
templates_path=["_templates"]
html_theme="pyramid"

extensions=[
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.mathjax",
]
autosummary_generate=True
autodoc_typehints = "description"
autodoc_member_order = 'bysource'
