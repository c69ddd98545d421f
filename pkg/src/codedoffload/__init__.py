"""Privacy-preserving offload of neural-network linear algebra via coded shares over a prime field."""
from .errors import CodedOffloadError, IntegrityViolation
from .fieldcore import P25, P61, PRIMES, FieldMatrix, Prime
from .quantizer import QuantParams, dequantize, quantize

__version__ = "0.1.0"
