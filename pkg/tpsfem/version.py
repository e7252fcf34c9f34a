from semver import VersionInfo  # type: ignore
from dataclasses import dataclass
from typing import Union

# This is replaced by the release workflow when publishing
version = '%VERSION%'

# Use the above version if it has been replaced, otherwise use a dev placeholder
__version__ = version if version.count('%') == 0 else '0.0.dev0'

# Version written into every JSON export
FORMAT_VERSION = '1.0.0'


@dataclass
class FormatRequirements:
    """Export format versions this release can read.
    Args:
        min (str): oldest readable format version, inclusive.
        max (str): first unreadable format version, exclusive.
    """
    _earliest_format_supported = '1.0.0'
    _latest_format_supported = '2.0.0'

    min: str = _earliest_format_supported
    max: str = _latest_format_supported

    def message(self) -> str:
        return f'supported format versions "{self.min}" to "{self.max}" exclusive'


def format_is_readable(file_version: str) -> Union[str, None]:
    """Checks to see if a file written with file_version can be loaded by this release.
    Args:
        file_version (str): SemVer format version stored in the file.
    Returns:
        str: An error string if there is one, None implies compatible.
    """
    return compare_version_compatibility(file_version, FormatRequirements())


def compare_version_compatibility(
    file_version: str,
    requirements: FormatRequirements,
    writer_version: str = FORMAT_VERSION,
) -> Union[str, None]:
    """Checks whether a file's format version lies within the given requirements.
    writer_version is passed in so tests don't depend on FORMAT_VERSION.
    Args:
        file_version (str): SemVer formatted version found in the file.
        requirements (FormatRequirements): readable version range.
        writer_version (str, optional): SemVer version this release writes. Defaults to FORMAT_VERSION.
    Returns:
        str: An error string if there is one, None implies compatible.
    """
    try:
        VersionInfo.parse(writer_version)
        file_v = VersionInfo.parse(file_version)
        min_req_satisfied = file_v.compare(requirements.min) >= 0
        max_req_satisfied = file_v.compare(requirements.max) < 0
    except (ValueError, TypeError) as e:
        return str(e)
    if not max_req_satisfied or not min_req_satisfied:
        return (f'File format is version "{file_version}". Current format version is "{writer_version}", '
                f'{requirements.message()}')
    return None
