from twinlod.access.core import (
    AccessControl,
    ClientCredential,
    Decision,
    Policy,
    Token,
    match_path,
)

__all__ = [
    "AccessControl",
    "ClientCredential",
    "Decision",
    "Policy",
    "Token",
    "match_path",
]
