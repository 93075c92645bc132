"""Block-scaled low-bit codecs for compressing tensor-parallel all-gather traffic.

The package splits into:

* ``formats``   -- element/scale format value objects and the name registry
* ``codec``     -- block quantization and the MXC1 wire format
* ``baselines`` -- TopK sparsification and channel-wise INT comparison codecs
* ``tpsim``     -- simulated row-wise TP reduction with error reporting
* ``search``    -- scheme grid search, selection rule, ablations, fixtures
* ``netbench``  -- throttled all-gather benchmark plus the analytic cost model
* ``cli``       -- ``mxcomm`` command-line front end (RTNS tensor file I/O)
"""

from .formats import (
    ELEMENT_FORMATS,
    SCALE_FORMATS,
    ElementFormat,
    FormatKind,
    ScaleFormat,
    SchemeDescriptor,
    ValueGrid,
    effective_bits,
    element_format,
    emax,
    enumerate_grid,
    parse_scheme,
    scale_format,
)
from .codec import (
    CompressedTensor,
    compress_tensor,
    decompress_tensor,
    dequantize_block,
    deserialize,
    quantize_block,
    serialize,
    serialized_nbytes,
)
from .baselines import (
    ChannelIntPacket,
    TopKPacket,
    channelwise_int_compress,
    channelwise_int_decompress,
    topk_compress,
    topk_decompress,
)
from .tpsim import (
    ReductionReport,
    TPConfig,
    parallelism_sweep,
    shard_rowwise,
    simulate_reduction,
)
from .search import (
    CandidateResult,
    SearchConfig,
    SelectionResult,
    ablate,
    run_grid,
    select_scheme,
    table1_grid,
)
from .netbench import (
    BenchResult,
    LinkModel,
    calibrate_codec_throughput,
    predict_comm_time,
    run_allgather_bench,
)

__version__ = "0.1.0"
