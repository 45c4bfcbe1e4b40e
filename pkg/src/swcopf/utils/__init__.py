# ┌────────────────────────────────────────────────────────────────────────────┐
# │ PROMOTING COMMONLY USED FUNCTIONS FROM SUBMODULES                          │
# └────────────────────────────────────────────────────────────────────────────┘
# These relative imports make selected functions/classes available directly via:
#     from swcopf.utils import vprint, get_date, svec, ...
#
# Relative imports keep this file independent of the root package name.

from .common import (  # noqa: F401
    CustomLogger,
    get_date,
    parse_sec_to_time_str,
    print_system_info,
    time_sync,
    vprint,
)
from .math_ops import (  # noqa: F401
    hermitian_to_real,
    real_to_hermitian,
    skron,
    smat,
    stable_hash,
    svec,
    svec_dim,
    svec_index,
    svec_indices,
)
