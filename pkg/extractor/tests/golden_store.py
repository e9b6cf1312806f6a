"""Golden container bytes shared with the extractor's test suite.

One class ("golden"), one video of 2x3 frames, 2x3 prompts.  Both packages
must produce exactly these bytes from the same logical content.
"""

import numpy as np

FRAME_HEX = (
    "46534531010000000100000002000000030000000900676f6c64656e2f7630000000"
    "000000803f0000004000004040000080400000a0400000c040"
)
PROMPT_HEX = (
    "4653503101000000010000000200000003000000000000000000003f000000bf0000"
    "803e0000c03f00002040000060c0"
)

CLASS_NAME = "golden"
VIDEO_ID = "golden/v0"
FRAMES = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype=np.float32)
PROMPTS = np.array([[0.5, -0.5, 0.25], [1.5, 2.5, -3.5]], dtype=np.float32)
T, C, R = 2, 3, 2
