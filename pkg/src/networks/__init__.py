"""
Networks package for dgtta.

Contains the segmentation network and everything that runs it:
- SegNet: compact 3D encoder-decoder with named parameter groups
- Sliding-window inference over full volumes
- Checkpoint directories (parameters + manifest + trace)
"""
