"""Coordinator-side coding: coefficients, encoding, decoding, integrity, leakage."""
from .coeffs import (
    BackwardCoeffs,
    EncodingCoeffs,
    backward_coeffs_for,
    constraint_target,
    gen_backward_coeffs,
    gen_forward_coeffs,
    noise_rows_private,
    verify_coeff_constraint,
)
from .encoding import (
    NoiseBlock,
    ShareSet,
    aggregate_field,
    aggregate_gradient,
    as_delta_list,
    combine_deltas,
    decode_forward,
    decode_full,
    encode,
    share_equation,
    stack_results,
)
from .integrity import (
    ExtendedCoeffs,
    Verdict,
    aggregate_with_verification,
    decode_with_verification,
    extend_coeffs,
    extend_for_integrity,
    gen_backward_coeffs_extended,
    parity_vector,
)
from .leakage import (
    binomial_reject_limit,
    chi_square_uniformity,
    exact_view_distribution,
    exhaustive_mutual_information,
    subset_mutual_information,
)
