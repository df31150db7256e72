"""Smoke test for the vlkit extension module.

Build and install with `maturin develop -m crates/python/Cargo.toml`, or put
the compiled library on PYTHONPATH as `vlkit.so`, then run this script.
"""

import json
import math
import sys

import vlkit

BOX = "<box><x_155><y_154><x_221><y_206></box>"


def check(name, cond):
    print(("ok   " if cond else "FAIL ") + name)
    return bool(cond)


def main():
    results = []
    v = vlkit.Vocab()
    results.append(check("vocab size", len(v) == 256 + 512 + 2 * 2048 + 2 + 1000 + 18))
    results.append(check("manifest round trip", vlkit.Vocab.from_manifest(v.manifest()).manifest() == v.manifest()))
    results.append(check("text round trip", v.decode_text(v.encode_text("héllo")) == "héllo"))

    rec = json.loads(v.parse("box", BOX))
    results.append(check("appendix box parses", rec["box"] == [155, 154, 221, 206]))
    results.append(check("box emits back", v.emit("box", json.dumps(rec)) == BOX))

    labels = [[1, 1, 2], [0, 0, 0]]
    runs = vlkit.rle_encode(labels)
    results.append(check("rle round trip", vlkit.rle_decode(runs, 2, 3) == labels and runs == "1:2,2:1,0:3"))

    spec = vlkit.DepthSpec("nyuv2")
    bins = spec.quantize([[5.0, 0.0]])
    results.append(check("depth bins", bins == [[500, 0]]))
    back = spec.dequantize(bins)
    results.append(check("depth centre", abs(back[0][0] - 4.995) < 1e-12 and back[0][1] == 0.0))

    sky, road = v.category_ids("sky"), v.category_ids("road")
    logits = [[0.0] * 256 for _ in range(4)]
    for i, row in enumerate(logits):
        for t in (sky if i % 2 == 0 else road):
            row[t] = 1.0
    seg = vlkit.decode_semseg(logits, [sky, road], (2, 2), (4, 4))
    results.append(check("semseg decode shape", len(seg) == 4 and all(len(r) == 4 for r in seg)))

    idx, util = vlkit.quantize([[0.0, 0.1], [0.9, 1.0]], [[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]], 1, 2)
    results.append(check("quantizer", idx == [0, 1] and abs(util - 2 / 3) < 1e-12))

    loss, grad = vlkit.ntp_m_loss([[2.0, -1.0, 0.5]], [[1, 0, 0]], [[True, True, True]], 1)
    results.append(check("ntp-m loss", loss > 0 and len(grad[0]) == 3))
    loss, _ = vlkit.vluas_loss([[0.0, 0.0], [0.0, 0.0]], [("text", 0), ("image", 1)], 0.5)
    results.append(check("vluas loss", abs(loss - 1.5 * math.log(2)) < 1e-12))

    results.append(check("grounding reward", vlkit.grounding_reward((155, 154, 221, 206), (155, 154, 221, 206)) == 1.0))
    gt = [[("cat", (0, 0, 10, 10))]]
    pred = [[("cat", (0, 0, 6, 10), 0.9)]]
    results.append(check("map hand case", abs(vlkit.map_coco(pred, gt) - 0.3) < 1e-12))
    results.append(check("kl at one", vlkit.kl_metric([1.0, 1.0]) == 0.0))
    results.append(check("clipped objective", abs(vlkit.dapo_objective([1.0], [[2.0]], [[1.0]]) - 1.24) < 1e-12))

    pts = [(c, 3.0 * c ** -0.102) for c in (1e3, 1e4, 1e5)]
    alpha, _, r2 = vlkit.fit_power_law(pts)
    results.append(check("power-law fit", abs(alpha - 0.102) < 1e-9 and r2 > 0.999))

    report = vlkit.train_demo(seed=0, steps=40)
    results.append(check("training lowers loss", report["smoothed_end"] < report["smoothed_start"]))

    try:
        vlkit.rle_decode("1:5", 2, 2)
        results.append(check("bad rle raises", False))
    except ValueError:
        results.append(check("bad rle raises", True))

    print(f"{sum(results)}/{len(results)} checks passed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
