#!/usr/bin/env python3
"""Regenerate the bundled fixtures in data/.

house_prices_synth.csv  House-Prices-shaped table (Id, 79 features, SalePrice),
                        drawn from a zone-dependent latent model. Not real data.
digits-images-idx3-ubyte / digits-labels-idx1-ubyte
                        scikit-learn's 8x8 handwritten digits in IDX layout,
                        pixels rescaled from 0..16 to 0..255.

Output is deterministic for a fixed --seed.
"""

import argparse
import pathlib
import struct

import numpy as np

NUMERIC = [
    "MSSubClass", "LotFrontage", "LotArea", "OverallQual", "OverallCond", "YearBuilt", "YearRemodAdd",
    "MasVnrArea", "BsmtFinSF1", "BsmtFinSF2", "BsmtUnfSF", "TotalBsmtSF", "1stFlrSF", "2ndFlrSF",
    "LowQualFinSF", "GrLivArea", "BsmtFullBath", "BsmtHalfBath", "FullBath", "HalfBath", "BedroomAbvGr",
    "KitchenAbvGr", "TotRmsAbvGrd", "Fireplaces", "GarageYrBlt", "GarageCars", "GarageArea", "WoodDeckSF",
    "OpenPorchSF", "EnclosedPorch", "3SsnPorch", "ScreenPorch", "PoolArea", "MiscVal", "MoSold", "YrSold",
]

CATEGORICAL = {
    "MSZoning": None,  # drawn separately, drives the split
    "Street": ["Pave", "Grvl"],
    "Alley": ["NA", "Grvl", "Pave"],
    "LotShape": ["Reg", "IR1", "IR2", "IR3"],
    "LandContour": ["Lvl", "Bnk", "HLS", "Low"],
    "Utilities": ["AllPub", "NoSeWa"],
    "LotConfig": ["Inside", "Corner", "CulDSac", "FR2", "FR3"],
    "LandSlope": ["Gtl", "Mod", "Sev"],
    "Neighborhood": ["NAmes", "CollgCr", "OldTown", "Edwards", "Somerst", "Gilbert", "NridgHt", "Sawyer"],
    "Condition1": ["Norm", "Feedr", "Artery", "RRAn", "PosN"],
    "Condition2": ["Norm", "Feedr", "Artery"],
    "BldgType": ["1Fam", "TwnhsE", "Duplex", "Twnhs", "2fmCon"],
    "HouseStyle": ["1Story", "2Story", "1.5Fin", "SLvl", "SFoyer"],
    "RoofStyle": ["Gable", "Hip", "Flat", "Gambrel"],
    "RoofMatl": ["CompShg", "Tar&Grv", "WdShngl"],
    "Exterior1st": ["VinylSd", "HdBoard", "MetalSd", "Wd Sdng", "Plywood"],
    "Exterior2nd": ["VinylSd", "HdBoard", "MetalSd", "Wd Sdng", "Plywood"],
    "MasVnrType": ["None", "BrkFace", "Stone", "NA"],
    "ExterQual": ["TA", "Gd", "Ex", "Fa"],
    "ExterCond": ["TA", "Gd", "Fa"],
    "Foundation": ["PConc", "CBlock", "BrkTil", "Slab"],
    "BsmtQual": ["TA", "Gd", "Ex", "NA", "Fa"],
    "BsmtCond": ["TA", "Gd", "Fa", "NA"],
    "BsmtExposure": ["No", "Av", "Gd", "Mn", "NA"],
    "BsmtFinType1": ["Unf", "GLQ", "ALQ", "BLQ", "Rec", "LwQ", "NA"],
    "BsmtFinType2": ["Unf", "Rec", "LwQ", "NA"],
    "Heating": ["GasA", "GasW", "Grav"],
    "HeatingQC": ["Ex", "TA", "Gd", "Fa"],
    "CentralAir": ["Y", "N"],
    "Electrical": ["SBrkr", "FuseA", "FuseF"],
    "KitchenQual": ["TA", "Gd", "Ex", "Fa"],
    "Functional": ["Typ", "Min2", "Min1", "Mod"],
    "FireplaceQu": ["NA", "Gd", "TA", "Fa", "Ex"],
    "GarageType": ["Attchd", "Detchd", "BuiltIn", "NA"],
    "GarageFinish": ["Unf", "RFn", "Fin", "NA"],
    "GarageQual": ["TA", "Fa", "NA"],
    "GarageCond": ["TA", "Fa", "NA"],
    "PavedDrive": ["Y", "N", "P"],
    "PoolQC": ["NA", "Gd", "Ex"],
    "Fence": ["NA", "MnPrv", "GdWo"],
    "MiscFeature": ["NA", "Shed", "Gar2"],
    "SaleType": ["WD", "New", "COD"],
    "SaleCondition": ["Normal", "Partial", "Abnorml", "Family"],
}

# Kaggle column order: Id, 79 features, SalePrice.
ORDER = [
    "MSSubClass", "MSZoning", "LotFrontage", "LotArea", "Street", "Alley", "LotShape", "LandContour", "Utilities",
    "LotConfig", "LandSlope", "Neighborhood", "Condition1", "Condition2", "BldgType", "HouseStyle", "OverallQual",
    "OverallCond", "YearBuilt", "YearRemodAdd", "RoofStyle", "RoofMatl", "Exterior1st", "Exterior2nd", "MasVnrType",
    "MasVnrArea", "ExterQual", "ExterCond", "Foundation", "BsmtQual", "BsmtCond", "BsmtExposure", "BsmtFinType1",
    "BsmtFinSF1", "BsmtFinType2", "BsmtFinSF2", "BsmtUnfSF", "TotalBsmtSF", "Heating", "HeatingQC", "CentralAir",
    "Electrical", "1stFlrSF", "2ndFlrSF", "LowQualFinSF", "GrLivArea", "BsmtFullBath", "BsmtHalfBath", "FullBath",
    "HalfBath", "BedroomAbvGr", "KitchenAbvGr", "KitchenQual", "TotRmsAbvGrd", "Functional", "Fireplaces",
    "FireplaceQu", "GarageType", "GarageYrBlt", "GarageFinish", "GarageCars", "GarageArea", "GarageQual",
    "GarageCond", "PavedDrive", "WoodDeckSF", "OpenPorchSF", "EnclosedPorch", "3SsnPorch", "ScreenPorch", "PoolArea",
    "PoolQC", "Fence", "MiscFeature", "MiscVal", "MoSold", "YrSold", "SaleType", "SaleCondition",
]
assert len(ORDER) == 79 and set(ORDER) == set(NUMERIC) | set(CATEGORICAL)

ZONES = ["RL", "RM", "FV", "RH", "C (all)"]
ZONE_P = [0.79, 0.15, 0.045, 0.011, 0.004]
MISSING_NUMERIC = {"LotFrontage": 0.18, "MasVnrArea": 0.01, "GarageYrBlt": 0.055}


def house_prices(rng, n):
    zone = rng.choice(len(ZONES), size=n, p=ZONE_P)
    harmful = zone == 0
    latent_dim = 12
    z = rng.standard_normal((n, latent_dim))
    # Zone-dependent mixing, so the two splits get different covariance structure.
    mix_h = rng.standard_normal((latent_dim, len(NUMERIC)))
    mix_p = rng.standard_normal((latent_dim, len(NUMERIC)))
    num = np.where(harmful[:, None], z @ mix_h, z @ mix_p)
    num += 0.5 * rng.standard_normal(num.shape)
    scale = rng.uniform(1, 500, size=len(NUMERIC))
    offset = rng.uniform(0, 2000, size=len(NUMERIC))
    num = num * scale + offset
    cols = {name: num[:, j] for j, name in enumerate(NUMERIC)}
    cols["LotArea"] = np.abs(9000 + 3000 * (z[:, 0] - 0.5 * z[:, 3]) + 800 * rng.standard_normal(n))
    for name in ["OverallQual", "OverallCond", "MoSold", "FullBath", "GarageCars", "Fireplaces"]:
        cols[name] = np.round(np.abs(cols[name]) % 10)
    for name in ["YearBuilt", "YearRemodAdd", "GarageYrBlt", "YrSold"]:
        cols[name] = 1900 + np.round(np.abs(cols[name]) % 110)

    cats = {}
    for name, levels in CATEGORICAL.items():
        if levels is None:
            cats[name] = np.array([ZONES[k] for k in zone], dtype=object)
            continue
        logits = z[:, : min(latent_dim, len(levels))] @ rng.standard_normal((min(latent_dim, len(levels)), len(levels)))
        logits[:, 0] += 2.0  # a dominant level, as in the real table
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        u = rng.random(n)[:, None]
        idx = (p.cumsum(axis=1) < u).sum(axis=1)
        cats[name] = np.array([levels[min(k, len(levels) - 1)] for k in idx], dtype=object)

    price = 180000 + 40000 * (z[:, 0] + z[:, 1] - 0.7 * z[:, 2]) + 25000 * (harmful * z[:, 4])
    price = np.abs(price + 12000 * rng.standard_normal(n)).round()

    rows = []
    for i in range(n):
        rec = [str(i + 1)]
        for name in ORDER:
            if name in cats:
                rec.append(cats[name][i])
            else:
                miss = MISSING_NUMERIC.get(name, 0.0)
                v = cols[name][i]
                rec.append("NA" if rng.random() < miss else f"{v:.0f}" if abs(v) > 50 else f"{v:.3f}")
        rec.append(f"{price[i]:.0f}")
        rows.append(rec)
    header = ["Id"] + ORDER + ["SalePrice"]
    return header, rows


def write_csv(path, header, rows):
    def q(s):
        return '"' + s.replace('"', '""') + '"' if any(c in s for c in ',"\n') else s

    with open(path, "w", newline="") as f:
        f.write(",".join(q(h) for h in header) + "\n")
        for r in rows:
            f.write(",".join(q(c) for c in r) + "\n")


def write_idx(images_path, labels_path, images, labels):
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels.astype(np.uint8).tobytes())


def digits():
    from sklearn.datasets import load_digits

    d = load_digits()
    images = np.rint(d.images * (255.0 / 16.0)).clip(0, 255)
    return images, d.target


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path(__file__).resolve().parent.parent / "data")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--rows", type=int, default=1460)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    header, rows = house_prices(rng, args.rows)
    write_csv(args.out / "house_prices_synth.csv", header, rows)
    images, labels = digits()
    write_idx(args.out / "digits-images-idx3-ubyte", args.out / "digits-labels-idx1-ubyte", images, labels)
    print(f"wrote {len(rows)} table rows and {len(labels)} digit images to {args.out}")


if __name__ == "__main__":
    main()
