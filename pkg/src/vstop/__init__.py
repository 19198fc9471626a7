"""vstop: screened Vlasov-Poisson linear response and stopping power of a fast charge.

Modules
-------
profiles        physical inputs (mu, phi, Phi) and their transforms
dispersion      dispersion function a(z), boundary values, Penrose margin
greens          linear-response Green's function (resolvent + spectral routes)
response        moving-charge source, per-mode solves, stopping force (two routes)
charge_dynamics deceleration ODE and envelope checks
kinetics        characteristics, scattering geometry, straightening, source terms
simulator       coarse delta-f marker simulation of the coupled system
cli             configuration and subcommand dispatch
"""

__version__ = "0.1.0"
