"""Per-scene volumetric reconstruction from orthographic 2.5D supervision.

A multi-layer triplane radiance field is fitted to four fixed orthographic
RGB / silhouette / depth views, then rendered, meshed, retextured and scored
against reference geometry. Submodules:

    cameras    view conventions, ray generation
    field      tri-grid representation, feature decoder, checkpoint I/O
    render     volume rendering quadrature (forward)
    fitting    losses, hand-written reverse pass, Adam loop
    synthetic  analytic test scenes and ground-truth render generation
    scene      dataset folder layout (images + cameras.json)
    delinify   illustration line removal (DoG detect + inpaint)
    retexture  front-view color projection onto the fitted field
    meshops    marching cubes, point sampling, chamfer / F-score, evaluation
    formats    PFM / PNG / OBJ I/O and atomic writes
    config     pipeline configuration dataclasses
    cli        command line entry points
"""

__version__ = "0.1.0"
