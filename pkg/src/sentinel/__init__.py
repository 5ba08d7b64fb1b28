"""iam-sentinel: streaming anomaly detection for cloud IAM audit logs."""

__version__ = "0.1.0"
