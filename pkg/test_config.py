# ============================================
# GSCodec - Test Configuration
# ============================================
# Edit these values to control the synthetic end-to-end run

# Output directory for generated scenes, containers and renders
WORK_DIR = "synthetic_run"

# Static scene: number of splats and SH degree (0-3)
STATIC_POINTS = 50000
SH_DEGREE = 1

# Dynamic scene: splats, frames, GOF length, share of static points
DYNAMIC_POINTS = 5000
FRAME_COUNT = 120
GOF_LEN = 30
STATIC_FRACTION = 0.8

# Cameras on an orbit around the scene, and their resolution
NUM_CAMERAS = 4
IMAGE_SIZE = 128

# Bit widths swept for the RD curve of each preset
SWEEP_BITS = [5, 6, 7, 8]

# Seed shared by the generator and the encoder
SEED = 0
