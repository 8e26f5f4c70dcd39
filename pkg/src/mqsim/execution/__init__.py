from .arith import (
    ACC_BITS,
    AccumulatorOverflowError,
    IntTensor,
    WideAccumulator,
    accumulator_bound,
    check_accumulator,
    shift_multiply,
)
from .engine import (
    LayerError,
    dequantized_weights,
    weight_only_mse,
    errors_to_json,
    execute_layer,
    layer_accumulator_bound,
    output_mse,
    requantize,
    run_network,
    signed_weights,
    weight_multipliers,
    write_error_report,
)

__all__ = [name for name in dir() if not name.startswith("_")]
