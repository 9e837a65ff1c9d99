"""Small shared setup for the demo scripts: one seeded benchmark and a quick model."""

import logging

from fluxmut import CaeConfig, FlowConfig, FluxMutModel, SynthSpec, build_kde, generate, train_cae, train_flow
from fluxmut.kde import BinGrid


def quick_model(spec: SynthSpec, epochs: int = 40):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    data = generate(spec)
    tr, va = data["train"], data["val"]
    cae = train_cae(tr.features, tr.conditions, CaeConfig(max_epochs=epochs), va.features, va.conditions)
    aug, ks = cae.augment(tr.features, tr.conditions), cae.scale_conditions(tr.conditions)
    flow = train_flow(aug, ks, FlowConfig(bijections=5, hidden=(48, 48), lr=1e-3, max_epochs=epochs),
                      cae.augment(va.features, va.conditions), cae.scale_conditions(va.conditions))
    kde = build_kde(flow, aug, tr.conditions, BinGrid.from_widths(tr.conditions, 0.5), ks)
    return FluxMutModel(cae, flow, kde), data
