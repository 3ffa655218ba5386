"""Train the micro model on the default synthetic corpus (within-plot) and report test mIoU."""

from common import end_to_end, main

if __name__ == "__main__":
    main("end_to_end", end_to_end, __doc__, blocks=4)
