"""Exception hierarchy shared by every stage of the calibration pipeline."""


class CalibError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(CalibError):
    """Invalid or incomplete configuration (maps to CLI exit code 2)."""


# core geometry
class BehindCamera(CalibError):
    def __init__(self, label=None):
        self.label = label
        msg = "point behind camera" if label is None else f"point {label!r} behind camera"
        super().__init__(msg)


class NoConvergence(CalibError):
    pass


# target model
class InvalidSpec(CalibError):
    pass


class NoMatch(CalibError):
    pass


class AmbiguousMatch(CalibError):
    pass


# event features
class SegmentTooShort(CalibError):
    pass


class NoValidMap(CalibError):
    pass


class TooFewPoints(CalibError):
    pass


class DegenerateConfiguration(CalibError):
    pass


class MissingLeds(CalibError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"LED keypoints missing for corners {self.missing}")


# lidar features
class EmptyAfterCrop(CalibError):
    pass


class InsufficientInliers(CalibError):
    def __init__(self, round_index, count=None):
        self.round = round_index
        self.count = count
        super().__init__(f"plane round {round_index}: insufficient inliers ({count})")


class NotOrthogonal(CalibError):
    pass


class IllConditioned(CalibError):
    pass


# rgb features
class ParseError(CalibError):
    pass


class InvariantViolation(CalibError):
    def __init__(self, marker_id, reason=""):
        self.marker_id = marker_id
        super().__init__(f"marker {marker_id}: {reason}" if reason else f"marker {marker_id}")


class UnknownMarkerId(CalibError):
    def __init__(self, marker_id):
        self.marker_id = marker_id
        super().__init__(f"marker id {marker_id} not part of the target layout")


# simulator
class LedOutOfFrame(CalibError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"LED {index} projects outside the event frame")


class MarkerOutOfFrame(CalibError):
    def __init__(self, marker_id):
        self.marker_id = marker_id
        super().__init__(f"marker {marker_id} projects outside the RGB frame")
