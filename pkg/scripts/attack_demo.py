"""Full attack walkthrough: full-surface attack, sticker discovery, export,
and both evaluation protocols against a trained model.

Usage:
    python scripts/attack_demo.py --model model.rpw --class 0 --target 5
"""

import argparse
import time

from signadv import (
    AttackConfig,
    DriveByConfig,
    drive_by_eval,
    discover_mask,
    export_sticker_sheet,
    run_attack,
    save_perturbation,
    simulate_drive_by,
    stationary_success_rate,
)
from signadv import attack as attack_lib
from signadv import evaluate as eval_lib
from signadv import model, signs, transforms
from signadv.rng import substream


def fresh_pairs(canonical, perturbation, distribution, count, seed):
    rng = substream(seed, "demo-eval")
    pairs = []
    for i in range(count):
        sample = transforms.sample_transform(distribution, rng)
        clean = transforms.synthesize_instance(canonical, sample)
        perturbed = attack_lib.apply_perturbation(clean, perturbation, sample=sample)
        pairs.append(eval_lib.ConditionPair(clean, perturbed, f"draw{i:03d}", ""))
    return pairs


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", default="model.rpw")
    parser.add_argument("--class", dest="true_class", type=int, default=0)
    parser.add_argument("--target", type=int, default=5)
    parser.add_argument("--iterations", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="attack_demo_out")
    args = parser.parse_args()

    params = model.load_weights(args.model)
    spec = signs.REFERENCE_CLASSES[args.true_class]
    canonical = signs.render_sign(spec, params.input_side, args.seed)
    region = signs.sign_region_mask(spec, params.input_side)
    config = AttackConfig(
        iterations=args.iterations,
        target_class=args.target,
        seed=args.seed,
    )

    print("== full-surface attack ==")
    t0 = time.time()
    full_pert, trace = run_attack(
        canonical, args.true_class, params, attack_lib.region_mask(region), config
    )
    print(f"probe success {trace.best_probe_success:.3f} ({time.time() - t0:.0f}s)")
    save_perturbation(f"{args.out}/full", full_pert)

    print("== sticker attack ==")
    t0 = time.time()
    mask = discover_mask(
        canonical, args.true_class, params, config, sign_region=region
    )
    sticker_pert, trace = run_attack(
        canonical, args.true_class, params, mask, config
    )
    print(
        f"mask coverage {mask.coverage:.3f}, probe success "
        f"{trace.best_probe_success:.3f} ({time.time() - t0:.0f}s)"
    )
    save_perturbation(f"{args.out}/sticker", sticker_pert)
    sheet = export_sticker_sheet(sticker_pert, canonical, 512, f"{args.out}/sheet.png")
    print(f"sticker sheet -> {sheet}")

    print("== evaluation ==")
    pairs = fresh_pairs(canonical, sticker_pert, config.distribution, 256, args.seed)
    report = stationary_success_rate(pairs, args.true_class, args.target, params)
    print(f"stationary: {report.numerator}/{report.denominator} = {report.success_rate}")

    frames = simulate_drive_by(canonical, sticker_pert, DriveByConfig(), args.seed)
    for k in (10, 15):
        report = drive_by_eval(frames, k, args.true_class, args.target, params)
        print(f"drive-by k={k}: {report.numerator}/{report.denominator} = {report.success_rate}")


if __name__ == "__main__":
    main()
