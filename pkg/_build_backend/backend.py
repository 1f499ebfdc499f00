"""Build backend wrapper.

setup.py in this repo is a bootstrap script (.env, working directories), not a
setuptools script, so packaging metadata lives in pyproject.toml and the
bootstrap script is skipped during builds.
"""

from setuptools import build_meta as _orig
from setuptools.build_meta import *  # noqa: F401,F403


class _Backend(_orig._BuildMetaBackend):
    def run_setup(self, setup_script='setup.py'):
        # A missing script makes setuptools fall back to a bare setup() call.
        super().run_setup(setup_script='_no_setup_script_.py')


_backend = _Backend()
get_requires_for_build_wheel = _backend.get_requires_for_build_wheel
get_requires_for_build_sdist = _backend.get_requires_for_build_sdist
prepare_metadata_for_build_wheel = _backend.prepare_metadata_for_build_wheel
build_wheel = _backend.build_wheel
build_sdist = _backend.build_sdist
get_requires_for_build_editable = _backend.get_requires_for_build_editable
prepare_metadata_for_build_editable = _backend.prepare_metadata_for_build_editable
build_editable = _backend.build_editable
