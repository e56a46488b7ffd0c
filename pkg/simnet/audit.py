"""Privacy audit over a run's message log."""
from collections import Counter
from dataclasses import dataclass, field

from dagster import get_dagster_logger

logger = get_dagster_logger(__name__)

SHARE_RECONSTRUCTION = (
    "plaintext first-round shares: a neighbour holding the public weights and parameters "
    "can solve the sender's local-share equations for its raw observations"
)


@dataclass
class PrivacyReport:
    violations: list = field(default_factory=list)
    counts_by_kind: dict = field(default_factory=dict)
    counts_by_classification: dict = field(default_factory=dict)
    caveats: list = field(default_factory=list)
    unprotected_shares: int = 0
    exposures: list = field(default_factory=list)

    @property
    def clean(self):
        """No raw value on the wire and no share left open to reconstruction"""
        return not self.violations and not self.exposures

    def to_dict(self):
        return {
            "clean": self.clean,
            "violations": self.violations,
            "exposures": self.exposures,
            "counts_by_kind": self.counts_by_kind,
            "counts_by_classification": self.counts_by_classification,
            "caveats": self.caveats,
            "unprotected_shares": self.unprotected_shares,
        }


def audit_privacy(log):
    """Flag raw observations on the wire and unencrypted first-round shares; degree-1 caveats are listed apart"""
    violations = [entry.message_id for entry in log.entries if entry.raw_data_exposed]
    unprotected = sum(1 for e in log.entries if e.classification.value == "LOCAL_SHARE")
    report = PrivacyReport(
        violations=violations,
        counts_by_kind=dict(sorted(Counter(e.kind.value for e in log.entries).items())),
        counts_by_classification=dict(sorted(Counter(e.classification.value for e in log.entries).items())),
        caveats=list(log.caveats),
        unprotected_shares=unprotected,
        exposures=[SHARE_RECONSTRUCTION] if unprotected else [],
    )
    if violations:
        logger.warning(f"Privacy audit found {len(violations)} messages exposing raw data, first ids {violations[:10]}")
    if unprotected:
        logger.warning(f"Privacy audit found {unprotected} unencrypted first-round shares")
    return report
