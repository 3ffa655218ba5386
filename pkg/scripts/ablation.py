"""Seeded paired ablation: full model against drop_vimb and ssm_layers=0."""

from common import ablation, main

if __name__ == "__main__":
    main("ablation", ablation, __doc__, blocks=3)
