#!/usr/bin/env python
"""
MGC Dispatch Lab - Setup Script
Microgrid-cluster dispatch and risk-sensitive policy optimization
"""

from pathlib import Path


def create_env_file():
    """Create a .env file if it doesn't exist"""
    env_file = Path('.env')
    if not env_file.exists():
        env_content = """# MGC Dispatch Lab Configuration

# Paths
MGC_DATA_PATH=./data
MGC_CONFIG_PATH=./configs
MGC_OUT_DIR=./runs

# Logging (DEBUG, INFO, WARNING, ERROR)
MGC_LOG_LEVEL=INFO
"""
        with open('.env', 'w') as f:
            f.write(env_content)
        print("✅ Created .env file - Please update with your settings")
    else:
        print("ℹ️  .env file already exists")


def create_directories():
    """Create working directories"""
    directories = [
        'runs',
        'reports',
    ]

    for directory in directories:
        Path(directory).mkdir(parents=True, exist_ok=True)
        gitkeep = Path(directory) / '.gitkeep'
        gitkeep.touch(exist_ok=True)

    print("✅ Created project directories")


def check_bundled_data():
    """Confirm the bundled feeders and fleets are present"""
    required = [
        'data/networks/ieee33.json',
        'data/networks/toy6.json',
        'data/fleets/synthetic_fleet.json',
        'data/fleets/toy_fleet.json',
    ]
    missing = [path for path in required if not Path(path).exists()]
    if missing:
        print(f"⚠️  Missing bundled data: {', '.join(missing)}")
    else:
        print("✅ Bundled network and fleet data found")


def main():
    """Main setup function"""
    print("\n⚡ Setting up the MGC Dispatch Lab...\n")

    create_env_file()
    create_directories()
    check_bundled_data()

    print("\n✨ Setup complete! Next steps:")
    print("1. Update .env file with your settings")
    print("2. Run 'pip install -r requirements.txt' to install dependencies")
    print("3. Run 'python cli.py power-flow-check' to verify the 33-bus feeder")
    print("4. Run 'python cli.py run --scenario toy --iterations 20' for a first training run")


if __name__ == "__main__":
    main()
