"""Small builders for hand-made fixtures."""

from malrisk.datastore import DeviceProfile
from malrisk.identity import PackageId, hash_devcert, pseudonymize_device

SALT = b"test-salt"


def dc(i) -> str:
    return hash_devcert(f"cert-{i}".encode())


def pid(i, name="com.example.app", v=1) -> PackageId:
    return PackageId(dc(i), name, v)


def dev_name(i) -> str:
    return pseudonymize_device(f"device-{i}", SALT)


def device(i, packages, **meta) -> DeviceProfile:
    if not isinstance(packages, dict):
        packages = {p: None for p in packages}
    return DeviceProfile(dev_name(i), packages, **meta)
