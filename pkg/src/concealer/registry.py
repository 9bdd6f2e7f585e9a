"""Registered-user plumbing on the data-provider side.

The provider keeps a list of users allowed to query each service provider
and ships it encrypted; the processor authenticates against it before
generating any trapdoor.  Credentials here are shared 32-byte verifiers
derived from the master secret - deliberately minimal, this is not where
the system's novelty lives.
"""

from __future__ import annotations

import hashlib
import hmac

from .crypto import MasterSecret, derive_registry_key, rnd_encrypt
from .wire import pack_registry


def credential_for(master: MasterSecret, user_id: str) -> bytes:
    """Derive the 32-byte shared credential the provider hands a user."""
    return hmac.new(master.bytes, b"user-cred:" + user_id.encode(), hashlib.sha256).digest()


def build_registry_blob(master: MasterSecret, user_ids: list[str]) -> bytes:
    records = [(uid, credential_for(master, uid)) for uid in user_ids]
    return rnd_encrypt(derive_registry_key(master), pack_registry(records))
