#!/usr/bin/env python
"""
Simple smoke script to verify the simulator is working correctly
"""

import os
import sys
import django

# Add the project directory to Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

# Set up Django environment
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'fecapsim.settings')
django.setup()

from fecap import energy, instrument
from fecap.config import RunConfig, parse_config


def test_basic_functionality():
    """Check the landscape triptych and run one short PUND measurement"""
    print("Testing fecap simulator...")

    # Test 1: energy landscape presets
    print("\n1. Testing landscape presets...")
    barriers = {}
    for case, (stack, e_bias) in energy.LANDSCAPE_PRESETS.items():
        minima = [sp.d for sp in energy.stationary_points(stack, e_bias=e_bias) if sp.kind == energy.MINIMUM]
        barriers[case] = energy.barrier_heights(stack, e_bias=e_bias)
        print(f"SUCCESS: {case}: minima at {', '.join(f'{d:+.4f}' for d in minima)} C/m2, "
              f"barriers {barriers[case].from_up:.3e} / {barriers[case].from_down:.3e} J/m3")
    if not barriers['interface'].from_up < barriers['intrinsic'].from_up:
        print("ERROR: interface layer did not lower the barrier")
        return False
    if not barriers['fixed_charge_interface'].from_up < barriers['fixed_charge_interface'].from_down:
        print("ERROR: fixed-charge bias did not make P-up metastable")
        return False

    # Test 2: configuration round trip
    print("\n2. Testing configuration parsing...")
    config = parse_config("[ensemble]\nn_domains = 32\n[simulation]\nsteps_per_segment = 100\n")
    if config.ensemble.n_domains != 32 or config.stack != RunConfig().stack:
        print("ERROR: configuration did not parse as expected")
        return False
    print("SUCCESS: configuration parsed")

    # Test 3: short PUND measurement
    print("\n3. Testing PUND measurement...")
    try:
        result = instrument.run_pund(config.build_model(), config.pund)
    except Exception as e:
        print(f"ERROR: PUND measurement failed: {e}")
        return False
    loop = result.loop
    print(f"SUCCESS: 2Pr = {loop.two_pr * 100:.2f} uC/cm2, "
          f"switching peaks at {loop.peak_v_pos:+.2f} V / {loop.peak_v_neg:+.2f} V")

    print("\nAll checks passed! The simulator is working correctly.")
    return True


if __name__ == "__main__":
    success = test_basic_functionality()
    if success:
        print("\nSimulator is ready to use!")
        print("\nTo run a measurement, e.g.: python manage.py pund --config device.ini")
        print("Run the test suite with: python manage.py test fecap")
    else:
        print("\nSome checks failed. Please check the errors above.")
        sys.exit(1)
