# Error types
# Every failure the pipeline can report derives from CodriverError so callers
# (pipeline fallback, CLI exit codes) can catch by family.


class CodriverError(Exception):
    """Base class for all codriver errors"""


class ConfigError(CodriverError):
    """Invalid scenario, route, simulator or manifest configuration"""


class InvalidPolicy(ConfigError):
    """Policy table violates tier ordering or schema"""


# ================================================================
# BEHAVIOR TREE
# ================================================================

class BehaviorTreeError(CodriverError):
    """Base class for behavior-tree parse and extraction failures"""


class NoRootBlock(BehaviorTreeError):
    pass


class UnbalancedBraces(BehaviorTreeError):
    pass


class MalformedEntry(BehaviorTreeError):
    pass


class DuplicateKey(BehaviorTreeError):
    pass


class MissingField(BehaviorTreeError):
    pass


class OutOfRange(BehaviorTreeError):
    pass


class BadEnum(BehaviorTreeError):
    pass


# ================================================================
# ANALYZER
# ================================================================

class AnalyzerError(CodriverError):
    """Base class for remote analyzer failures"""


class AnalyzerTimeout(AnalyzerError):
    pass


class ProtocolError(AnalyzerError):
    pass


class TransportError(AnalyzerError):
    pass


class AnalyzerUnavailable(AnalyzerError):
    """Analyzer failures exceeded the configured fallback budget"""


# ================================================================
# BUS / METRICS / DATASET
# ================================================================

class BusError(CodriverError):
    pass


class UnknownTopic(BusError):
    pass


class TypeMismatch(BusError):
    pass


class MetricsError(CodriverError):
    pass


class DegenerateSeries(MetricsError):
    pass


class MissingCategory(MetricsError):
    pass


class DatasetError(CodriverError):
    pass


class MalformedRecord(DatasetError):
    pass
