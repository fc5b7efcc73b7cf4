"""Wall permittivity/conductivity profile estimation from same-side scattered fields."""

__version__ = "0.1.0"
