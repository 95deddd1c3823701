from .Attention import SelfAttention
from .Convolution import ConvolutionModule
from .FeedForward import FeedForwardModule
from .Normalization import LayerNorm
