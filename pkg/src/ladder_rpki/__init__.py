"""Ladder-authenticated repository publication and validation.

Modules:

* :mod:`.mtl` - Merkle Tree Ladder construction, roots and paths
* :mod:`.signing` - signature scheme profiles and the executable test scheme
* :mod:`.formats` / :mod:`.tlv` - canonical encodings of Manifests, CRLs, roots
* :mod:`.publisher` - CA state machine, snapshots and the registry aggregate
* :mod:`.service` - HTTP and in-process publication-point service
* :mod:`.validator` - relying-party sync and bulk verification
* :mod:`.bench` - synthetic repositories, churn and size accounting
"""

from .mtl import Ladder, auth_path, fold_path, ladder_root, leaf_hash, node_hash, rung_sizes
from .publisher import CertificateAuthority, PublicationPoint, Registry
from .service import EndpointDescriptor, LoopbackTransport, PublicationServer, RepositoryView
from .validator import ValidatorCache, bulk_verify, emit_validated, localize_diff, sync_cycle, verify_path_mode

__version__ = "0.1.0"

__all__ = [
    "CertificateAuthority",
    "EndpointDescriptor",
    "Ladder",
    "LoopbackTransport",
    "PublicationPoint",
    "PublicationServer",
    "Registry",
    "RepositoryView",
    "ValidatorCache",
    "auth_path",
    "bulk_verify",
    "emit_validated",
    "fold_path",
    "ladder_root",
    "leaf_hash",
    "localize_diff",
    "node_hash",
    "rung_sizes",
    "sync_cycle",
    "verify_path_mode",
]
