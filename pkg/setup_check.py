"""
Setup Verification Script
Checks that all requirements are met before running the UNO toolkit
"""

import os
import sys
from pathlib import Path

# Color codes for terminal output
GREEN = '\033[92m'
RED = '\033[91m'
YELLOW = '\033[93m'
BLUE = '\033[94m'
RESET = '\033[0m'


def print_header(text):
    """Print section header"""
    print(f"\n{BLUE}{'='*60}{RESET}")
    print(f"{BLUE}{text}{RESET}")
    print(f"{BLUE}{'='*60}{RESET}")


def print_success(text):
    print(f"{GREEN}✓ {text}{RESET}")


def print_error(text):
    print(f"{RED}✗ {text}{RESET}")


def print_warning(text):
    print(f"{YELLOW}⚠ {text}{RESET}")


def check_python_version():
    """Check Python version"""
    print_header("Checking Python Version")

    major, minor = sys.version_info[:2]
    if (major, minor) >= (3, 10):
        print_success(f"Python {major}.{minor} detected (Required: 3.10+)")
        return True
    print_error(f"Python {major}.{minor} detected (Required: 3.10+)")
    print("  Please upgrade Python to 3.10 or higher")
    return False


def check_dependencies():
    """Check required Python packages"""
    print_header("Checking Dependencies")

    required_packages = ["numpy", "scipy", "pandas", "pydantic", "dotenv", "sklearn"]
    # only needed by the test suite
    test_packages = ["pytest"]

    all_installed = True
    for package in required_packages:
        try:
            __import__(package)
            print_success(f"{package} is installed")
        except ImportError:
            print_error(f"{package} is NOT installed")
            all_installed = False

    for package in test_packages:
        try:
            __import__(package)
            print_success(f"{package} is installed")
        except ImportError:
            print_warning(f"{package} not installed (needed for the tests only)")

    if not all_installed:
        print("\n  Install missing packages:")
        print("  pip install -r requirements.txt")
    return all_installed


def check_env_variables():
    """Check optional UNO_* environment variables"""
    print_header("Checking Environment Variables")

    from dotenv import load_dotenv
    load_dotenv()

    if not Path(".env").exists():
        print_warning(".env file not found (defaults apply; see .env.example)")

    optional_vars = {
        "UNO_OUTPUT_DIR": "uno_runs",
        "UNO_LOG_LEVEL": "INFO",
        "UNO_WORKERS": "1",
    }
    ok = True
    for var, default in optional_vars.items():
        value = os.getenv(var)
        if value:
            print_success(f"{var}={value}")
        else:
            print_warning(f"{var} not set (will use {default})")

    workers = os.getenv("UNO_WORKERS", "1")
    if not workers.isdigit() or int(workers) < 1:
        print_error(f"UNO_WORKERS must be a positive integer, got '{workers}'")
        ok = False
    level = os.getenv("UNO_LOG_LEVEL", "INFO").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        print_error(f"UNO_LOG_LEVEL '{level}' is not a logging level")
        ok = False
    return ok


def check_files():
    """Check required files exist"""
    print_header("Checking Required Files")

    required_files = [
        "uno_cli.py",
        "uno_score.py",
        "trainers.py",
        "mask_seg.py",
        "requirements.txt",
        ".env.example",
    ]
    all_exist = True
    for filename in required_files:
        if Path(filename).exists():
            print_success(f"{filename} exists")
        else:
            print_error(f"{filename} NOT found")
            all_exist = False
    return all_exist


def check_directories():
    """Check/create the output directory"""
    print_header("Checking Output Directory")

    from dotenv import load_dotenv
    load_dotenv()

    dir_path = Path(os.getenv("UNO_OUTPUT_DIR", "uno_runs"))
    if dir_path.exists():
        print_success(f"{dir_path}/ exists")
        return True
    try:
        dir_path.mkdir(parents=True, exist_ok=True)
        print_success(f"{dir_path}/ created")
        return True
    except OSError as e:
        print_error(f"Failed to create {dir_path}/")
        print(f"  Error: {e}")
        return False


def check_smoke():
    """Score one point and round-trip one tensor"""
    print_header("Running Smoke Test")

    import numpy as np

    from openset_net import ClassifierHead
    from tensor_io import decode_tensor, encode_tensor
    from uno_score import s_uno

    head = ClassifierHead(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]), np.zeros(3), 2, "image-wide")
    triple = s_uno(np.array([0.5, -0.5]), head)
    if triple.s_uno != triple.s_unc + triple.s_no:
        print_error("s_uno != s_unc + s_no")
        return False
    print_success(f"s_uno={triple.s_uno:.5f} (s_unc={triple.s_unc:.5f}, s_no={triple.s_no:.5f})")

    arr = np.arange(6, dtype=np.float64).reshape(2, 3)
    if not np.array_equal(decode_tensor(encode_tensor(arr)), arr):
        print_error("UNOT tensor round trip failed")
        return False
    print_success("UNOT tensor round trip")
    return True


def main():
    """Run all checks"""
    print(f"\n{BLUE}{'='*60}{RESET}")
    print(f"{BLUE}  UNO Toolkit - Setup Verification{RESET}")
    print(f"{BLUE}{'='*60}{RESET}")

    checks = [
        ("Python Version", check_python_version),
        ("Dependencies", check_dependencies),
        ("Environment Variables", check_env_variables),
        ("Required Files", check_files),
        ("Output Directory", check_directories),
        ("Smoke Test", check_smoke),
    ]

    results = []
    for name, check_func in checks:
        try:
            results.append((name, check_func()))
        except Exception as e:
            print_error(f"Error running {name} check: {e}")
            results.append((name, False))

    print_header("Summary")
    passed = sum(1 for _, result in results if result)
    total = len(results)
    for name, result in results:
        status = f"{GREEN}PASS{RESET}" if result else f"{RED}FAIL{RESET}"
        print(f"  {name:.<40} {status}")
    print(f"\n  Checks passed: {passed}/{total}")

    if passed == total:
        print(f"\n{GREEN}{'='*60}{RESET}")
        print(f"{GREEN}  ✓ All checks passed! You're ready to go!{RESET}")
        print(f"{GREEN}{'='*60}{RESET}")
        print("\n  Next step: generate a toy bundle")
        print("  python uno_cli.py gen-data --set seed=0 --out data/toy")
        return 0

    print(f"\n{RED}{'='*60}{RESET}")
    print(f"{RED}  ✗ Some checks failed. Please fix the issues above.{RESET}")
    print(f"{RED}{'='*60}{RESET}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
