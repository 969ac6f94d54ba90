"""
Physics-informed refinement of initial channel estimates with RSS-map fusion
"""
