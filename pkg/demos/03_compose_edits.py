"""Chain two independently trained mappers on one face.

Trains brow-raise and eye-close mappers separately, applies them in
sequence to a held-out face, and checks the detector rules for both
expressions on the composed mesh. Neither mapper ever saw the other
during training; composition works because both edits are residual.
"""

import numpy as np

from expredit.embedding import synthesize_desk_fixture
from expredit.evaluation import (au_fire, desk_au_rules, eval_states,
                                 neutral_template)
from expredit.mappers import init_mapper_params
from expredit.morphable import (FlameParams, generate_mesh,
                                synthesize_desk_model)
from expredit.pipeline import (OptimConfig, compose_edits,
                               desk_reference_alphas, train_expression)
from expredit.surrogates import synthesize_desk_surrogates

SEED = 1


def main() -> None:
    model = synthesize_desk_model(seed=SEED)
    fixture = synthesize_desk_fixture(seed=SEED)
    gen, enc = synthesize_desk_surrogates(SEED, model, fixture)
    refs = desk_reference_alphas(model)

    mappers = []
    for name in ("raise_brow", "close_eyes"):
        config = OptimConfig(expression_name=name,
                             target_text_key=f"text:{name}",
                             reference_alpha_key=f"alpha:{name}")
        print(f"training {name!r} ({config.steps} steps) ...")
        trained, history = train_expression(
            model, init_mapper_params(seed=SEED), gen, enc,
            fixture.subspace(), fixture, refs, config)
        print(f"  cosine {history[0].cosine:+.3f} -> "
              f"{history[-1].cosine:+.3f}")
        mappers.append(trained)

    state = eval_states(SEED, 1, mappers[0].dims)[0]
    composed = compose_edits(mappers, state)
    mesh = generate_mesh(model, FlameParams(
        theta=np.zeros(model.n_shape), beta=np.zeros(model.n_pose),
        alpha=composed.alpha))

    rules = desk_au_rules(model)
    template = neutral_template(model)
    print("detector rules on the composed mesh:")
    for au_id, label in (("AU_02", "brow raised"),
                         ("AU_CE", "eyes closed")):
        fired = au_fire(rules[au_id], mesh, template, model.region_labels)
        print(f"  {au_id} ({label}): {'fires' if fired else 'silent'}")
    print(f"composed expression code: "
          f"{np.array2string(composed.alpha, precision=3)}")


if __name__ == "__main__":
    main()
