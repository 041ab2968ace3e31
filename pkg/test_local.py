"""
Smoke script: runs each handler once against a scratch directory
"""

import json
import os
import sys
import tempfile

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

# Load environment variables
from dotenv import load_dotenv
load_dotenv()

print("=" * 60)
print("FLOW-STRATA ENGINE - LOCAL TEST")
print("=" * 60)

out_dir = tempfile.mkdtemp(prefix='flow-strata-')
print(f"\nOutput directory: {out_dir}")


def call(handler, event):
    response = handler(dict(event, out=out_dir), None)
    return response['exitCode'], json.loads(response['body'])


# Test 1: Import handlers
print("\n[1] Testing Handler Imports...")
try:
    from handlers import ci_lines, estimate, experiment, generate, train, validate_strata
    print("   ✅ All handlers imported successfully")
except Exception as e:
    print(f"   ❌ Handler import failed: {e}")
    sys.exit(1)

# Test 2: Testbed catalogue
print("\n[2] Listing Testbeds...")
try:
    from estimation.testbeds import CATALOGUE

    print("   " + "-" * 56)
    for name, spec in CATALOGUE.items():
        print(f"   {name:15} | d={spec.dimension:<3} | {', '.join(spec.functions)}")
    print("   " + "-" * 56)
    print(f"   ✅ Total: {len(CATALOGUE)} testbeds")
except Exception as e:
    print(f"   ❌ Catalogue failed: {e}")

# Test 3: Generate observations
print("\n[3] Generating example1 Observations...")
data_path = None
try:
    code, body = call(generate.handler, {'testbed': 'example1', 'n': 500, 'seed': 1})
    data_path = body.get('path')
    print(f"   {'✅' if code == 0 else '❌'} {body.get('rows')} rows written to {data_path}")
except Exception as e:
    print(f"   ❌ Generate failed: {e}")

# Test 4: Strata diagnostics
print("\n[4] Validating a Spherical Scheme...")
try:
    code, body = call(validate_strata.handler, {
        'scheme': {'kind': 'spherical', 'm_r': 3, 'm0': 2}, 'd': 3, 'n_samples': 20000,
    })
    for check in body.get('checks', []):
        print(f"   {'✅' if check['passed'] else '❌'} {check['name']}")
except Exception as e:
    print(f"   ❌ Validation failed: {e}")

# Test 5: Train a GMM
print("\n[5] Training a GMM (k=3)...")
try:
    if data_path is None:
        raise RuntimeError("no observations from step 3")
    code, body = call(train.handler, {'data_path': data_path, 'model': {'kind': 'gmm', 'k': 3}})
    print(f"   {'✅' if code == 0 else '❌'} {body.get('iterations')} EM iterations, "
          f"mean log-likelihood {body.get('mean_log_likelihood')}")
except Exception as e:
    print(f"   ❌ Training failed: {e}")
    import traceback
    traceback.print_exc()

# Test 6: Estimates and a short experiment
print("\n[6] Estimating j+0.5 on example1...")
try:
    config = {
        'name': 'smoke',
        'testbed': 'example1',
        'functions': ['j+0.5'],
        'schemes': [{'kind': 'cmc'}, {'kind': 'cartesian', 'm0': 4}],
        'allocations': ['prop', 'opt'],
        'R': [1024],
        'repetitions': 5,
    }
    code, body = call(estimate.handler, {'config': config, 'seed': 7})
    for row in body.get('rows', []):
        print(f"   {row['method']:5} {row['scheme']:18} E={row['E']:.6f} SD={row['SD']:.6f}")
    code, body = call(experiment.handler, {'config': config, 'seed': 7})
    print(f"   {'✅' if code == 0 else '❌'} Experiment aggregate: {body.get('aggregate')}")
    code, body = call(ci_lines.handler, {'config': dict(config, R=[256], schemes=[{'kind': 'cmc'}]),
                                         'repetitions': 50, 'seed': 7})
    print(f"   {'✅' if code == 0 else '❌'} CI coverage: {body['cells'][0]['coverage']:.2f}")
except Exception as e:
    print(f"   ❌ Estimation failed: {e}")
    import traceback
    traceback.print_exc()

print("\n" + "=" * 60)
print("All local tests completed!")
print("=" * 60)
print("\nNext Steps:")
print("  1. Copy .env.example to .env and adjust the defaults")
print("  2. Run python cli.py --help for the subcommands")
print("  3. Run pytest -m 'not slow' for the quick suite")
print("=" * 60)
