from .pipeline import (
    CaptionRecord,
    Detection,
    Rejection,
    SynthesisConfig,
    SynthesisOutcome,
    SynthesisStats,
    annotate_boxes,
    check_record,
    extract_objects,
    filter_boxes,
    refine_time_boundary,
    synthesize_dataset,
    synthesize_record,
    write_outputs,
)
from .services import (
    ANALYZE,
    DETECT,
    HttpServiceClient,
    MockServiceClient,
    ServiceClient,
    ServiceError,
    ServiceProtocolError,
    ServiceUnavailableError,
)
