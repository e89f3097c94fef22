"""Shared test utilities: independent oracles and the criterion ledger."""
import time

import numpy as np

# criterion number -> (passed, detail); printed at the end of the session
CRITERIA = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    CRITERIA[number] = (title, bool(passed), detail)


def plain_iou(a, b):
    """IOU of two (x1, y1, x2, y2) tuples, written out without any library helper."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def random_image(rng, h=64, w=64):
    return np.round(rng.uniform(0, 1, size=(h, w, 3)) * 255) / 255


def oracle_ap(detections, ground_truth, class_id, t_iou=0.5):
    """11-point AP by re-running matching from scratch at every confidence cutoff.

    ``detections`` is a list of (corners, class, confidence, image);
    ``ground_truth`` maps image -> list of (corners, class).
    """
    gts = {img: [g for g, c in objs if c == class_id] for img, objs in ground_truth.items()}
    npos = sum(len(v) for v in gts.values())
    if npos == 0:
        return None
    dets = [d for d in detections if d[1] == class_id]
    points = []
    for cut in sorted({d[2] for d in dets}, reverse=True):
        kept = sorted((d for d in dets if d[2] >= cut), key=lambda d: -d[2])
        used = {img: set() for img in gts}
        tp = 0
        for box, _, _, img in kept:
            best, best_j = -1.0, None
            for j, g in enumerate(gts.get(img, [])):
                if j in used[img]:
                    continue
                v = plain_iou(box, g)
                if v > best:
                    best, best_j = v, j
            if best_j is not None and best >= t_iou:
                used[img].add(best_j)
                tp += 1
        points.append((tp, len(kept)))
    total = 0.0
    for level in range(11):
        # recall tp/npos >= level/10, compared in integers
        ok = [tp / n for tp, n in points if tp * 10 >= level * npos]
        total += max(ok) if ok else 0.0
    return total / 11


def oracle_vanishing(benign, adversarial, t):
    total = sum(len(b) for b in benign)
    gone = 0
    for bs, advs in zip(benign, adversarial):
        for b in bs:
            if not any(plain_iou(b[0], a[0]) >= t for a in advs):
                gone += 1
    return gone / total


def oracle_fabrication(benign, adversarial):
    return sum(1 for bs, advs in zip(benign, adversarial) if len(advs) > len(bs)) / len(benign)


def oracle_mislabel(benign, adversarial, target, t):
    total = sum(len(b) for b in benign)
    hit = 0
    for bs, advs in zip(benign, adversarial):
        for b in bs:
            if any(plain_iou(b[0], a[0]) >= t and a[1] == target[b[1]] for a in advs):
                hit += 1
    return hit / total


def oracle_mr(benign, adversarial, t):
    total = sum(len(b) for b in benign)
    hit = 0
    for bs, advs in zip(benign, adversarial):
        for b in bs:
            if any(plain_iou(b[0], a[0]) >= t and a[1] != b[1] for a in advs):
                hit += 1
    return hit / total


def oracle_ssim(a, b, k1=0.01 ** 2, k2=0.03 ** 2):
    """Direct per-channel evaluation with explicit loops over channels."""
    vals = []
    for ch in range(a.shape[2]):
        x = [float(v) for v in a[:, :, ch].ravel()]
        y = [float(v) for v in b[:, :, ch].ravel()]
        n = len(x)
        mx, my = sum(x) / n, sum(y) / n
        vx = sum((v - mx) ** 2 for v in x) / n
        vy = sum((v - my) ** 2 for v in y) / n
        cxy = sum((p - mx) * (q - my) for p, q in zip(x, y)) / n
        vals.append((2 * mx * my + k1) * (2 * cxy + k2) / ((mx * mx + my * my + k1) * (vx + vy + k2)))
    return sum(vals) / len(vals)


def random_box(rng, extent=40.0, lo=4.0, hi=16.0):
    x, y = rng.uniform(0, extent, 2)
    w, h = rng.uniform(lo, hi, 2)
    return (float(x), float(y), float(x + w), float(y + h))


def jitter(rng, box, amount=3.0):
    x1, y1, x2, y2 = (v + rng.uniform(-amount, amount) for v in box)
    return (x1, y1, max(x2, x1 + 1.0), max(y2, y1 + 1.0))


def random_ap_instance(rng, num_classes=2):
    """At most 5 ground truths and 10 detections over 1-3 images, distinct confidences."""
    n_img = int(rng.integers(1, 4))
    n_gt = int(rng.integers(1, 6))
    gt = {i: [] for i in range(n_img)}
    for _ in range(n_gt):
        gt[int(rng.integers(n_img))].append((random_box(rng), int(rng.integers(num_classes))))
    n_det = int(rng.integers(0, 11))
    confs = rng.permutation(np.linspace(0.05, 0.99, 50))[:n_det]
    dets = []
    flat = [(img, g) for img, objs in gt.items() for g in objs]
    for k in range(n_det):
        if flat and rng.uniform() < 0.7:
            img, (box, c) = flat[int(rng.integers(len(flat)))]
            box = jitter(rng, box)
            if rng.uniform() < 0.2:
                c = int(rng.integers(num_classes))
        else:
            img, box, c = int(rng.integers(n_img)), random_box(rng), int(rng.integers(num_classes))
        dets.append((box, c, float(confs[k]), img))
    return dets, gt


def random_asr_instance(rng, num_classes=3):
    """Aligned benign/adversarial per-image lists of (corners, class); benign nonempty overall."""
    while True:
        benign, adv = [], []
        for _ in range(int(rng.integers(1, 4))):
            bs = [(random_box(rng), int(rng.integers(num_classes))) for _ in range(int(rng.integers(0, 5)))]
            advs = []
            for box, c in bs:
                if rng.uniform() < 0.6:
                    advs.append((jitter(rng, box, 4.0), int(rng.integers(num_classes))))
            advs += [(random_box(rng), int(rng.integers(num_classes))) for _ in range(int(rng.integers(0, 3)))]
            benign.append(bs)
            adv.append(advs)
        if any(benign):
            return benign, adv


def fd_relative_errors(model, x, targets, which, pixels, step=1e-4, floor=1e-7):
    """Per-pixel relative error of the autograd gradient against central differences.

    ``pixels`` holds (row, col, channel) triples. The floor keeps the ratio
    defined where both values vanish.
    """
    g = model.input_gradient(x, targets, which=(which,))
    errs = []
    for i, j, c in pixels:
        xp, xm = x.copy(), x.copy()
        xp[i, j, c] += step
        xm[i, j, c] -= step
        fd = (model.loss_components(xp, targets).select((which,))
              - model.loss_components(xm, targets).select((which,))) / (2 * step)
        errs.append(abs(g[i, j, c] - fd) / max(abs(g[i, j, c]), abs(fd), floor))
    return errs


def sample_pixels(rng, x, targets, n=20):
    """Half near target centres (where box and class terms have support), half uniform."""
    h, w = x.shape[:2]
    out = []
    for k in range(n):
        if targets and k < n // 2:
            t = targets[k % len(targets)]
            i = int(np.clip(t.box.cy + rng.integers(-6, 7), 0, h - 1))
            j = int(np.clip(t.box.cx + rng.integers(-6, 7), 0, w - 1))
        else:
            i, j = int(rng.integers(h)), int(rng.integers(w))
        out.append((i, j, int(rng.integers(3))))
    return out
