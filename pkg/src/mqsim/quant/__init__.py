from .plan import (
    ACT_BITS,
    LayerPlan,
    QuantPlan,
    assign_m2q,
    filter_major_operand,
    parse_ratio,
    plan_from_json,
    plan_to_json,
    read_plan,
    synthetic_inputs,
    uniform_plan,
    write_plan,
)
from .pot import (
    APOT_CODE_BITS,
    APOT_P1,
    APOT_P2,
    APOT_P_MIN,
    APoTCodes,
    DegenerateFilterError,
    PoTCodes,
    apot_codebook,
    apot_magnitudes,
    apot_scale,
    pot_codebook,
    quantize_apot,
    quantize_pot,
)
from .select import UNIFORM_BITS, SchemeChoice, scheme_errors, select_scheme, select_schemes
from .uniform import Granularity, QuantParams, affine_from_range, calibrate_affine, dequantize_uniform, quantize_uniform

__all__ = [name for name in dir() if not name.startswith("_")]
