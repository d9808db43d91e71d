"""ftnorm: certified upper/lower bounds for operator-space tensor norms.

Upper bounds come from a block-structured SDP computing the decomposable
(factorization) norm of a matrix tuple; lower bounds from suprema of
``||sum u_i (x) x_i||`` over tuples of unitaries found by Haar-seeded
Riemannian ascent.  Agreement of the two engines certifies the norm.
The package also estimates Haagerup tensor norms on two-factor spans and
realizes CP extension / Stinespring dilation checks at matrix scale.
"""

__version__ = "0.1.0"

from .errors import CertificateError, InputError, SolverError
from .matkit import (CMatrix, HermEigResult, derive_seed, haar_unitary, herm_eig,
                     kron, op_norm, psd_check)
from .tuples import OperatorTuple, operator_tuple
from .sdp import (BlockTerm, LmiProgram, MatrixEquation, Objective, ScalarTerm,
                  SdpSolution, assemble_choi_program, assemble_dec_program, solve)
from .norms import (EstimateConfig, FactorizationCertificate, NormEstimate,
                    TraceRecord, UnitaryWitness, cauchy_schwarz_bound, dec_norm,
                    factorization_value, gauge_reduce, min_norm_estimate,
                    unitary_sup)
from .haagerup import (HTensorElement, haagerup_rep_lower, haagerup_upper,
                       htensor_element, operator_schmidt)
from .dilation import (ChoiMatrix, ExtensionReport, SpanSpec, StinespringData,
                       UnitalMapSpec, cp_extension, hom_extension_check,
                       range_invariance_defect, span_spec, stinespring_factor,
                       unital_map_spec)
from .verify import Report, SuiteResult, run_all

__all__ = [name for name in dir() if not name.startswith("_")]
