"""Symbolic engine for the method of equivalence on first-order PDE systems.

Submodules:

- ``symfield``      exact function-field arithmetic (roots, exponentials)
- ``exterior``      differential forms over a chosen 1-form basis
- ``jetspace``      first-order jet charts, contact forms, order reduction
- ``liftedcontact`` lifted coframes, structure equations, contact characters
- ``equivalence``   the reduction loop: restrict, normalize, absorb, prolong
- ``checker``       independent verification through prolonged vector fields
- ``frontend``      input language, session files, reporting, CLI
"""

from . import symfield
from . import exterior
from . import jetspace
from . import liftedcontact
from . import equivalence

__all__ = ["symfield", "exterior", "jetspace", "liftedcontact", "equivalence"]
__version__ = "0.1.0"
