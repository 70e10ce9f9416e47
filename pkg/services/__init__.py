"""重建流程的服務模組入口。"""

from .comm import InProcessTransport, allgather_segments, comm_model, memory_model, partition_angles, partition_image
from .metrics import add_noise, psnr, rmse
from .phantom_service import make_phantom
from .projector import back_project, build_projector, estimate_operator_norm, forward_project, pad_image
from .quantizers import decode_message, elbow_select, encode_segment, jpeg_decode, jpeg_encode, kmeans_dequantize, kmeans_quantize
from .run_repository import RunRepository
from .solvers import build_nodes, ctr_solve, dadmm_run, dual_update, local_u_update, local_x_segment_update
from .study_service import run_study

__all__ = [
    "InProcessTransport",
    "RunRepository",
    "add_noise",
    "allgather_segments",
    "back_project",
    "build_nodes",
    "build_projector",
    "comm_model",
    "ctr_solve",
    "dadmm_run",
    "decode_message",
    "dual_update",
    "elbow_select",
    "encode_segment",
    "estimate_operator_norm",
    "forward_project",
    "jpeg_decode",
    "jpeg_encode",
    "kmeans_dequantize",
    "kmeans_quantize",
    "local_u_update",
    "local_x_segment_update",
    "make_phantom",
    "memory_model",
    "pad_image",
    "partition_angles",
    "partition_image",
    "psnr",
    "rmse",
    "run_study",
]
