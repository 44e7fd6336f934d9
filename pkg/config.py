# Configuration for the robust polynomial optimization toolkit

# Polynomial arithmetic
COEFFICIENT_DROP_TOL = 1e-14      # coefficients below this are discarded

# Uncertainty sets
MEMBERSHIP_TOL = 1e-9             # absolute slack on defining inequalities
SAMPLE_MAX_ROUNDS = 200           # rejection batches before polyhedron sampling gives up

# Conic solver defaults
SOLVER_BACKEND = "auto"           # "bundled", "cvxpy" or "auto"
BUNDLED_MAX_VARIABLES = 3000      # "auto" hands larger programs to cvxpy
CVXPY_SOLVER = None               # None lets cvxpy pick (Clarabel/SCS)
FEASIBILITY_TOL = 1e-8
GAP_TOL = 1e-8
MAX_SOLVER_ITERATIONS = 200
CERTIFICATE_TOL = 1e-7            # Farkas ray / certificate residual check

# Linearization and state elimination
RANK_CONDITION_LIMIT = 1e10       # Jacobians above this count as rank deficient
PSD_EIGEN_TOL = 1e-9              # C_i counts as PSD when min eig >= -tol

# Alternating projections
AP_TOL = 1e-5
AP_F0 = 1e5
AP_MAX_ITERATIONS = 100
AP_STEP = 1.0
AP_STALL_WINDOW = 10              # premature NC rule: window length
AP_STALL_RATIO = 0.01             # ... and minimum relative decrease
COUPLING_MODE = "literal"         # "literal" or "convex"

# Dynamic outer loop
OUTER_TOL = 1e-5
OUTER_MAX_ITERATIONS = 1
OUTER_NORM = "2"                  # "2" or "inf"
OUTER_RANK_RETRIES = 5
LARGE_NETWORK_BUSES = 30          # trust radius divisor switches from 10 to 30

# Newton power flow
NEWTON_TOL = 1e-8
NEWTON_MAX_ITERATIONS = 30

# Posterior checks
CHECK_VARIABLE_CAP = 40
SIGMA0_DEGREE = 2
CHAINING_MODE = "chained"         # "chained", "parallel" or "off"
CHAINING_ORDER = ("P", "Q", "V", "I")
VERDICT_TOL = 1e-7

# ACOPF
SQUEEZE_FRACTION = 0.005
TABLE_SCALE = 100.0               # objective values are reported divided by this

# Output formatting
FORMAT_PRECISION = 2
TIME_PRECISION = 1
DEFAULT_OUTPUT_FORMAT = "md"
