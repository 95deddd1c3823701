from .adapters import Adapter, AdapterSpec, AdapterVariant, adapter_forward, is_adapter_path
from .conformer import (
    ConformerEncoder,
    ConformerLiteLayer,
    DecoderHead,
    SpeechModel,
    build_encoder,
    decode_greedy,
)
from .params import FreezePolicy, ParameterTree, set_freeze
