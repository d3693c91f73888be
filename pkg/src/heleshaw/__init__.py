"""Moving-mesh finite element simulation of a viscous droplet confined
between parallel plates, driven by surface tension.

Subpackage map:

- ``geometry``: the closed interface polyline and its discrete frames
- ``mesh``: triangulation of the droplet, transport and remeshing
- ``fem``: velocity/pressure spaces and all bilinear/boundary forms
- ``solver``: direct solution of the saddle-point systems
- ``schemes``: the four time-stepping schemes and the simulation loop
- ``lsa``: analytic mode predictions and growth-rate fitting
- ``cli``: configuration driven runner (``run``, ``verify``, ``bench``)
"""

__version__ = "0.1.0"
