"""Filter adaptive convolution and a frame-recurrent video deblurring network,
built on a small numpy autograd core."""

__version__ = "0.1.0"
