"""Traffic classification from raw packet bytes rendered as images, compared with flow-feature random forests."""
from .errors import TrafficLensError
from .features import FEATURE_NAMES, extract_flow_features, flow_vector
from .forest import Forest, ForestConfig
from .images import ImageDataset, ImageSample, bytes_to_image, pcap_to_dataset, read_idx, write_idx
from .metrics import ConfusionMatrix, MetricsReport, evaluate
from .pcap import CaptureMeta, FiveTuple, ParsedPacket, open_capture, read_packets, write_capture
from .split import TrafficUnit, TrimConfig, UnitMode, clean_units, split_units, trim_pad
from .training import TrainConfig, train_cnn

__version__ = "0.1.0"
