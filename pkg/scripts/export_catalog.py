"""Write the bundled scenario catalog to configs/ as JSON config files."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from modules.core.config import get_settings, save_config  # noqa: E402
from modules.harness.catalog import catalog_entry, catalog_ids  # noqa: E402


def export(config_dir: Path = None):
    config_dir = Path(config_dir or get_settings().config_path)
    for scenario_id in catalog_ids():
        scenario, run = catalog_entry(scenario_id)
        path = save_config(str(config_dir / f"{scenario_id}.json"), scenario, run)
        print("✅ Wrote", path)


if __name__ == "__main__":
    export(sys.argv[1] if len(sys.argv) > 1 else None)
