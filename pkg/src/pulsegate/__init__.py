"""Real-time detection of sports events from keyword-matched message streams."""
from .core import (BinnedSeries, Detection, EventTemplate, GroundTruthEvent, GroupKey, Message,
                   Rule, bin_messages)
from .detection import (DetectorConfig, FusionRule, MatchedFilter, ScoreTrace, StreamingDetector,
                        TemperatureConfig, detect, detect_offline, detect_streaming, filter_output,
                        fuse, temperature_detect)
from .templates import TemplateSet, build_template, build_template_set

__all__ = [
    "BinnedSeries", "Detection", "EventTemplate", "GroundTruthEvent", "GroupKey", "Message", "Rule",
    "bin_messages", "DetectorConfig", "FusionRule", "MatchedFilter", "ScoreTrace", "StreamingDetector",
    "TemperatureConfig", "detect", "detect_offline", "detect_streaming", "filter_output", "fuse",
    "temperature_detect", "TemplateSet", "build_template", "build_template_set",
]
__version__ = "0.1.0"
