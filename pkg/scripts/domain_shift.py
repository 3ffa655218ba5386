"""Train one model per protocol and seed; compare cross-plot and cross-year against within-plot."""

from common import domain_shift, main

if __name__ == "__main__":
    main("domain_shift", domain_shift, __doc__, blocks=3)
